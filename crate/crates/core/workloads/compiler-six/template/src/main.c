/* compiler sources go here */
